fn main() {
    std::process::exit(geolocality::cli::run(std::env::args_os()));
}
