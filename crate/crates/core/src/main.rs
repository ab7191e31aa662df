use clap::Parser;

use ngso_routing::cli::{dispatch, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    if let Err(e) = dispatch(cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            ngso_routing::Error::Config { .. } | ngso_routing::Error::Parse { .. } => 2,
            _ => 1,
        });
    }
}
