fn main() -> std::process::ExitCode {
    sargan::cli::main_with(std::env::args_os())
}
