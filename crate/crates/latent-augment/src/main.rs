fn main() {
    std::process::exit(latent_augment::cli::run());
}
