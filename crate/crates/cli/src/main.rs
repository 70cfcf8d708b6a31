use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mmctrl::main_with_args(std::env::args_os()))
}
