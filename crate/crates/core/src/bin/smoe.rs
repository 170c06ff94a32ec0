use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(moe_reduce::cli::run(std::env::args_os()) as u8)
}
