fn main() {
    sfa_iqa::cli::main();
}
