//! The four-rooms layout, its goals and the effect of slipping on a random
//! walker's success rate.

use fastslow::gridworld::{Action, GridWorld, Layout, Schedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let layout = Layout::classic();
    for r in 0..layout.rows() {
        let row: String = (0..layout.cols())
            .map(|c| match (r, c) {
                p if p == layout.green() => 'G',
                p if p == layout.yellow() => 'Y',
                p if layout.is_wall(p) => '#',
                _ => '.',
            })
            .collect();
        println!("{row}");
    }
    println!("{} start cells, observation size {}", layout.start_cells().len(), layout.cells() + 2);

    let schedule = Schedule {
        steps_per_task: 50_000,
        exposures: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for slip in [0.0, 0.2, 0.45] {
        let mut env = GridWorld::with_fixed_slip(layout.clone(), schedule, 400, slip, 1)?;
        let (mut slips, mut steps, mut episodes, mut total) = (0, 0, 0, 0.0);
        let mut state = env.reset(0);
        while episodes < 500 {
            let a = Action::from_index(rng.random_range(0..4));
            let (next, out) = env.step(&state, a);
            steps += 1;
            slips += usize::from(out.info.slip_occurred);
            total += out.reward;
            state = if out.done {
                episodes += 1;
                env.reset(0)
            } else {
                next
            };
        }
        println!(
            "slip {slip:.2}: observed slip rate {:.3}, random-walk mean return {:.3}",
            slips as f64 / steps as f64,
            total / episodes as f64
        );
    }
    Ok(())
}
