#![allow(dead_code)]

use got4rec::llm::{GenerationParams, Gateway, Responder, ScriptedMock, SyntheticResponder};
use got4rec::prompts::PromptLibrary;
use got4rec::retrieval::{EmbeddingMatrix, SequenceIndex, StubEmbedder};
use got4rec::strategies::{run_user, Env, Neighbourhood, RunRecord, StrategyConfig, StrategyRegistry, UserInput};

pub const TITLES: [&str; 24] = [
    "Fruit Nut Mix",
    "Trail Mix Classic",
    "Probiotic Snack Bar",
    "Low-Sugar Oat Cookies",
    "Dark Chocolate Almonds",
    "Green Tea Bags",
    "Organic Honey",
    "Roasted Cashews",
    "Protein Granola",
    "Dried Mango Slices",
    "Sea Salt Crackers",
    "Peanut Butter Cups",
    "Matcha Powder",
    "Coconut Chips",
    "Rice Cakes",
    "Keto Cookies",
    "Chamomile Tea",
    "Walnut Halves",
    "Energy Bites",
    "Seaweed Snacks",
    "Pumpkin Seeds",
    "Yogurt Raisins",
    "Espresso Beans",
    "Maple Syrup",
];

/// Deterministic users: user `u` walks the title list with stride `u + 1`.
pub fn users(count: usize, len: usize) -> Vec<UserInput> {
    (0..count)
        .map(|u| UserInput {
            user: format!("user{u:02}"),
            titles: (0..len).map(|i| TITLES[(u * 3 + i * (u % 5 + 1)) % TITLES.len()].to_string()).collect(),
        })
        .collect()
}

pub fn neighbourhood(users: &[UserInput]) -> Neighbourhood {
    let stub = StubEmbedder::new(16);
    let items = EmbeddingMatrix::from_rows(16, TITLES.iter().map(|t| (t.to_string(), stub.embed_one(t)))).unwrap();
    let index = SequenceIndex::build(&items, users.iter().map(|u| (u.user.as_str(), u.titles.as_slice()))).unwrap();
    Neighbourhood::new(index, users.iter().map(|u| (u.user.clone(), u.titles.clone())))
}

pub fn synthetic() -> SyntheticResponder {
    SyntheticResponder::new(TITLES)
}

pub fn gateway_with(responder: impl Responder + 'static) -> Gateway {
    Gateway::new(Box::new(ScriptedMock::new().with_fallback(responder)), GenerationParams::default()).unwrap()
}

pub fn run(name: &str, cfg: &StrategyConfig, gateway: &Gateway, nb: Option<&Neighbourhood>, user: &UserInput, seed: u64) -> RunRecord {
    let prompts = PromptLibrary::builtin();
    let env = Env { gateway, prompts: &prompts, neighbours: nb, seed };
    let registry = StrategyRegistry::builtin();
    run_user(registry.get(name).unwrap(), user, cfg, &env).unwrap()
}
