use algebroid_mech::cli::{run, Cli};
use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("ALGEBROID_LOG", "warn")).init();
    let cli = Cli::parse();
    std::process::exit(run(&cli));
}
