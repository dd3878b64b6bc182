use clap::Parser;

fn main() {
    let code = relsp_cli::run(relsp_cli::Cli::parse());
    std::process::exit(code);
}
