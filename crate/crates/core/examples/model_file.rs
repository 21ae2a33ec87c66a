//! Networks can be described in JSON, the same format the command-line tool
//! reads. This builds a three-node network from text, simulates a joint path
//! and evaluates its log-density, node by node and for the whole path.

use mjp_pgas::ctbn::{log_density_ctbn, log_density_node_given_parents, simulate_ctbn, CtbnSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NETWORK: &str = r#"{
  "nodes": [
    {"name": "driver", "states": 2, "cim": {"0": [[0, 1], [1, 0]]}},
    {"name": "relay", "states": 2, "cim": {"0": [[0, 0.2], [3, 0]], "1": [[0, 3], [0.2, 0]]}},
    {"name": "sink", "states": 3, "cim": {"0": [[0, 1, 0], [0, 0, 1], [1, 0, 0]], "1": [[0, 0, 2], [2, 0, 0], [0, 2, 0]]}}
  ],
  "edges": [[0, 1], [1, 2]],
  "initial": {"point_mass": [0, 0, 0]}
}"#;

fn main() -> mjp_pgas::Result<()> {
    let spec: CtbnSpec = serde_json::from_str(NETWORK)?;
    let model = spec.build()?;
    let path = simulate_ctbn(&model, 4.0, &mut ChaCha8Rng::seed_from_u64(2))?;
    for (w, name) in model.names().iter().enumerate() {
        println!(
            "{name:7} {} jumps, log-density given parents {:.4}",
            path.node(w).num_jumps(),
            log_density_node_given_parents(&model, w, &path)?
        );
    }
    println!("joint log-density {:.4}", log_density_ctbn(&model, &path)?);
    Ok(())
}
