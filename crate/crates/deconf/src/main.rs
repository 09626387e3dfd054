fn main() {
    std::process::exit(deconf::cli_main());
}
