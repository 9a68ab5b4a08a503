pub mod fake_bridge;
