use std::process::ExitCode;

fn main() -> ExitCode {
    mover_stayer::cli::main_with_args(std::env::args_os())
}
