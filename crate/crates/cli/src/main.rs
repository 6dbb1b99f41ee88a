use std::io::Write;
use std::process::ExitCode;

use edgewatt_cli::{run, Context};

fn main() -> ExitCode {
    let outcome = run(std::env::args_os(), &Context::from_env());
    // A closed pipe on either stream must not turn into a panic.
    let _ = std::io::stdout().lock().write_all(outcome.stdout.as_bytes());
    let _ = std::io::stderr().lock().write_all(outcome.stderr.as_bytes());
    ExitCode::from(outcome.code as u8)
}
