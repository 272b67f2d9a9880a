fn main() {
    flashocc::cli::main()
}
