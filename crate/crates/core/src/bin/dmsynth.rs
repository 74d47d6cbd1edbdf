fn main() {
    std::process::exit(dmsynth::cli::run(std::env::args_os()));
}
