fn main() {
    std::process::exit(qmu_cli::main_with(std::env::args_os()));
}
