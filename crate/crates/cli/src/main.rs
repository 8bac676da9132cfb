use clap::Parser;

fn main() {
    let cli = seedforge::Cli::parse();
    let code = seedforge::run(cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
