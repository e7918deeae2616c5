use clap::Parser;
use couple_sed::cli::{self, Args};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Err(e) = cli::run(&args) {
        eprintln!("couple-sed: {e}");
        std::process::exit(e.exit_code());
    }
}
