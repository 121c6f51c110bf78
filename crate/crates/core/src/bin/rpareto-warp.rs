fn main() {
    std::process::exit(rpareto_warp::cli::run());
}
