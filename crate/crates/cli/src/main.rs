mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            println!("{}", json!({"command": null, "status": "error", "exit_code": 1, "error": e.kind().to_string()}));
            return ExitCode::from(1);
        }
    };

    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    let command = commands::name(&cli.command);
    match commands::run(&cli) {
        Ok(mut summary) => {
            let obj = summary.as_object_mut().expect("summaries are objects");
            obj.insert("command".into(), json!(command));
            obj.insert("status".into(), json!("ok"));
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            log::error!("{}", f.message);
            println!(
                "{}",
                json!({"command": command, "status": "error", "exit_code": f.code, "error": f.message})
            );
            ExitCode::from(f.code as u8)
        }
    }
}
