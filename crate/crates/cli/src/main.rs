fn main() {
    std::process::exit(lieldp_cli::run(std::env::args_os()));
}
