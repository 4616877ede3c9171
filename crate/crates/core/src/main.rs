fn main() {
    anonmatch::cli::main()
}
