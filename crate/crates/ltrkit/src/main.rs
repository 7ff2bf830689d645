use clap::Parser;
use ltrkit::commands::{execute, requested_threads, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = requested_threads(&cli).and_then(|n| {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        execute(cli)
    });
    if let Err(err) = result {
        if is_broken_pipe(&err) {
            return;
        }
        eprintln!("error: {err:#}");
        std::process::exit(ltrkit::exit_code(&err));
    }
}

/// A closed stdout (for example `| head`) ends the command quietly.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}
