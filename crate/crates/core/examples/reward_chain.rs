//! Per-step rewards along a chain of estimated costs and the discounted
//! return. With gamma = 1 the return is first cost minus last.

use quite::domain::{discounted_return, reward, CostEstimate, Reward};

fn main() {
    let costs = [1840.0, 1210.5, 1302.0, 455.25];
    let est: Vec<CostEstimate> = costs.iter().map(|&c| CostEstimate::explain(0.0, c)).collect();
    let rewards: Vec<Reward> = est.windows(2).map(|w| reward(&w[0], &w[1])).collect();
    for (i, r) in rewards.iter().enumerate() {
        println!("step {i}: {:+.2}", r.value);
    }
    for gamma in [1.0, 0.9, 0.5] {
        println!("gamma {gamma}: return {:.2}", discounted_return(&rewards, gamma));
    }
    println!("first - last = {:.2}", costs[0] - costs[costs.len() - 1]);
}
