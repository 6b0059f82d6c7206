use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = sstu::cli::Cli::parse();
    if let Err(e) = sstu::cli::run(cli, &mut std::io::stdout().lock()) {
        eprintln!("sstu: {e}");
        std::process::exit(1);
    }
}
