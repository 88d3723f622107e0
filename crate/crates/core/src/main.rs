fn main() {
    std::process::exit(sbpc::cli::main());
}
