fn main() {
    std::process::exit(lsmix::cli::run());
}
