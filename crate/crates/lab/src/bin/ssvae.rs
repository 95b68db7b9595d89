use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ssvae_lab::run(std::env::args_os()))
}
