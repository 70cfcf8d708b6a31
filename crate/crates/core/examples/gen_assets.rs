use mmctrl_core::config::Config;
use mmctrl_core::profile::{generate_city, generate_highway, CITY_SEED, HIGHWAY_SEED};

fn main() {
    std::fs::write("default-config.json", Config::default().to_json()).unwrap();
    let mut c = Vec::new();
    generate_city(CITY_SEED, 600.0).write_csv(&mut c).unwrap();
    std::fs::write("fixtures/city.csv", c).unwrap();
    let mut h = Vec::new();
    generate_highway(HIGHWAY_SEED, 600.0).write_csv(&mut h).unwrap();
    std::fs::write("fixtures/highway.csv", h).unwrap();
}
