fn main() {
    std::process::exit(ctxasr::cli::run());
}
