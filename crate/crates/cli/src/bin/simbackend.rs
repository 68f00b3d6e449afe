//! Standalone simulator backend: `alod-simbackend --request <dir>`.
//!
//! Simulator settings come from the request's `backend_options`. Failures
//! are reported through `status.json`; the exit code is nonzero only when
//! the response itself cannot be written.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use alod_core::simbackend::serve_request_dir;

#[derive(Parser)]
#[command(name = "alod-simbackend", version, about = "Statistical detector simulator backend")]
struct Args {
    /// Request directory containing request.json.
    #[arg(long)]
    request: PathBuf,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match serve_request_dir(&args.request, None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[io]: {e}");
            ExitCode::from(1)
        }
    }
}
