use std::process::ExitCode;

fn main() -> ExitCode {
    mdlas::cli::main_with_args(std::env::args_os())
}
