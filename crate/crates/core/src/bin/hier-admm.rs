fn main() {
    std::process::exit(hier_admm::cli::main_from(std::env::args_os()));
}
