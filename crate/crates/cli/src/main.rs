fn main() {
    std::process::exit(lshensemble_cli::commands::run(std::env::args_os()));
}
