use super::{CausalRule, Cause, TaskSpec};
use crate::error::{Error, Result};

pub const BUILTIN_TASKS: &[&str] = &["GetSilverore", "GetIron", "Fire2Burn", "Wood2Wet"];

/// (effect, action, [(required var, min, consume)], delay mean)
type Row<'a> = (&'a str, &'a str, &'a [(&'a str, u8, u8)], f64);

fn build(name: &str, vars: &[&str], actions: &[&str], rows: &[Row], goal: &str) -> TaskSpec {
    let vi = |n: &str| vars.iter().position(|v| *v == n).expect("known variable");
    let ai = |n: &str| actions.iter().position(|a| *a == n).expect("known action");
    let rules = rows
        .iter()
        .map(|&(effect, action, reqs, mu)| {
            let mut parents = vec![Cause::Action(ai(action))];
            let mut consume = vec![0];
            for &(v, min, c) in reqs {
                parents.push(Cause::Var { var: vi(v), min });
                consume.push(c);
            }
            CausalRule {
                effect: vi(effect),
                parents,
                consume,
                delta: 1,
                delay_mean: mu,
                delay_sigma: 0.4,
            }
        })
        .collect();
    TaskSpec {
        name: name.to_string(),
        variables: vars.iter().map(|s| s.to_string()).collect(),
        actions: actions.iter().map(|s| s.to_string()).collect(),
        rules,
        goal: vi(goal),
    }
}

/// Built-in tasks. Every rule starts with `delay_sigma = 0.4`.
pub fn builtin_task(name: &str) -> Result<TaskSpec> {
    let spec = match name {
        "GetSilverore" => build(
            name,
            &["wood", "stone", "stick", "stonepickaxe", "silverore"],
            &[
                "collect_wood",
                "collect_stone",
                "craft_stick",
                "craft_stonepickaxe",
                "mine_silverore",
                "wait",
            ],
            &[
                ("wood", "collect_wood", &[], 2.0),
                ("stone", "collect_stone", &[], 2.0),
                ("stick", "craft_stick", &[("wood", 1, 1)], 3.0),
                ("stonepickaxe", "craft_stonepickaxe", &[("stone", 1, 1), ("stick", 1, 1)], 4.0),
                ("silverore", "mine_silverore", &[("stonepickaxe", 1, 0)], 3.0),
            ],
            "silverore",
        ),
        "GetIron" => build(
            name,
            &[
                "wood",
                "stone",
                "stick",
                "stonepickaxe",
                "stoneaxe",
                "ironore",
                "coal",
                "iron",
            ],
            &[
                "collect_wood",
                "collect_stone",
                "craft_stick",
                "craft_stonepickaxe",
                "craft_stoneaxe",
                "mine_ironore",
                "mine_coal",
                "smelt_iron",
                "wait",
            ],
            &[
                ("wood", "collect_wood", &[], 2.0),
                ("stone", "collect_stone", &[], 2.0),
                ("stick", "craft_stick", &[("wood", 1, 1)], 3.0),
                ("stonepickaxe", "craft_stonepickaxe", &[("stone", 1, 1), ("stick", 1, 1)], 4.0),
                ("stoneaxe", "craft_stoneaxe", &[("stone", 1, 1), ("stick", 1, 1)], 3.0),
                ("ironore", "mine_ironore", &[("stonepickaxe", 1, 0)], 3.0),
                ("coal", "mine_coal", &[("stoneaxe", 1, 0)], 2.0),
                ("iron", "smelt_iron", &[("ironore", 1, 1), ("coal", 1, 1)], 4.0),
            ],
            "iron",
        ),
        "Fire2Burn" => build(
            name,
            &["key", "door_open", "torch", "fire", "burnt"],
            &["pick_key", "open_door", "take_torch", "light_fire", "burn", "wait"],
            &[
                ("key", "pick_key", &[], 1.0),
                ("door_open", "open_door", &[("key", 1, 1)], 2.0),
                ("torch", "take_torch", &[("door_open", 1, 0)], 2.0),
                ("fire", "light_fire", &[("torch", 1, 1)], 3.0),
                ("burnt", "burn", &[("fire", 1, 1)], 2.0),
            ],
            "burnt",
        ),
        "Wood2Wet" => build(
            name,
            &["wood", "bucket", "water", "wet_wood"],
            &["collect_wood", "take_bucket", "fill_bucket", "soak", "wait"],
            &[
                ("wood", "collect_wood", &[], 2.0),
                ("bucket", "take_bucket", &[], 1.0),
                ("water", "fill_bucket", &[("bucket", 1, 0)], 3.0),
                ("wet_wood", "soak", &[("wood", 1, 1), ("water", 1, 1)], 2.0),
            ],
            "wet_wood",
        ),
        other => return Err(Error::UnknownTask(other.to_string())),
    };
    Ok(spec)
}
