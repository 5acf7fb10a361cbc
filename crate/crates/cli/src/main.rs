use clap::Parser;
use fmlab_cli::{execute, exit_code, status_line, Cli, CliError};

fn main() {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .init();

    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(CliError::Config(format!(
                "cannot start {n} worker threads: {e}"
            ))),
        },
        None => execute(&cli),
    };
    if let Err(e) = &result {
        log::error!("{e}");
    }
    println!("{}", status_line(cli.command, &result));
    std::process::exit(exit_code(&result));
}
