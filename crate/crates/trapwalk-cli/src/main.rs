mod config;
mod engine;
mod manifest;

fn main() {
    eprintln!("trapwalk: command dispatch not wired yet");
    std::process::exit(2);
}
