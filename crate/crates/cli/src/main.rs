use std::process::ExitCode;

fn main() -> ExitCode {
    if let Err(e) = hetplan_cli::configure_threads() {
        eprintln!("hetplan: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    ExitCode::from(hetplan_cli::run(std::env::args_os()) as u8)
}
