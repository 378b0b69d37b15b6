use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = ded::cli::Cli::parse();
    if let Err(err) = ded::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(ded::exit_code(&err));
    }
}
