fn main() {
    std::process::exit(sensorimotor::harness::cli_main(std::env::args()));
}
