fn main() {
    std::process::exit(fdeid::cli::main());
}
