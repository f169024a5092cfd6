fn main() -> std::process::ExitCode {
    homlab::cli::run(std::env::args_os())
}
