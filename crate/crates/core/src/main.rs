fn main() {
    std::process::exit(feddecorr::cli::run());
}
