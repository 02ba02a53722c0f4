use clap::Parser;

fn main() {
    let cli = paramscope::Cli::parse();
    if let Err(e) = paramscope::run(&cli) {
        eprintln!("paramscope: {e}");
        std::process::exit(e.exit_code());
    }
}
