fn main() {
    std::process::exit(coop_odes::cli::run());
}
