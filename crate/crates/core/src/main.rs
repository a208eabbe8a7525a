fn main() {
    std::process::exit(beamload::cli::main_with_logging());
}
