fn main() {
    std::process::exit(ffc_se::cli::main());
}
