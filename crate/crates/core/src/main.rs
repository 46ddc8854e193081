fn main() {
    std::process::exit(openaff::cli::main());
}
