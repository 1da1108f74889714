use std::process::ExitCode;

fn main() -> ExitCode {
    secrecy_cli::run(std::env::args_os())
}
