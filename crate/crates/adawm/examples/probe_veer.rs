fn main() {
    use adawm::drivesim::{yielding_follower_action, DriveSim, TaskConfig};
    for path in ["/tmp/veer-right-turn.toml", "/tmp/veer-left-turn.toml"] {
        let task = TaskConfig::from_toml_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let mut causes = std::collections::BTreeMap::new();
        for e in 0..30u64 {
            let mut sim = DriveSim::new(task.clone(), Default::default()).unwrap();
            sim.reset(123 + e);
            loop {
                let a = yielding_follower_action(&sim, 3.5);
                let res = sim.step(a).unwrap();
                if res.terminated {
                    let ego = sim.ego();
                    if e < 10 && res.cause != Some(adawm::drivesim::TerminationCause::Goal) {
                        println!("  {} ep{e}: {:?} at ({:.1},{:.1}) v={:.1} steps={}", task.id,
                            res.cause.unwrap(), ego.pos.x, ego.pos.y, ego.speed, sim.steps());
                    }
                    *causes.entry(format!("{:?}", res.cause.unwrap())).or_insert(0) += 1;
                    break;
                }
            }
        }
        println!("{}: {causes:?}", task.id);
    }
}
