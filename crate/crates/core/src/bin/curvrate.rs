fn main() -> std::process::ExitCode {
    curvrate::cli::main_with_args(std::env::args_os())
}
