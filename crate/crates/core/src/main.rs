use std::panic;
use std::process::ExitCode;

use clap::Parser;
use pickpoint::cli::{self, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Cli::parse();
    let code = match panic::catch_unwind(|| cli::run(args)) {
        Ok(Ok(summary)) => {
            println!("{summary}");
            0
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            println!("{}", serde_json::json!({ "error": e.to_string(), "exit_code": e.exit_code() }));
            e.exit_code()
        }
        Err(_) => {
            println!("{}", serde_json::json!({ "error": "internal error", "exit_code": 1 }));
            1
        }
    };
    ExitCode::from(code as u8)
}
