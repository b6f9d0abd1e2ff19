use clap::Parser;

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = tmerge_cli::Cli::parse();
    match tmerge_cli::run(cli, argv) {
        Ok(dir) => println!("run directory: {}", dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
