use clap::Parser;

fn main() {
    let args = flad::cli::Args::parse();
    std::process::exit(flad::cli::main_with(args));
}
