use super::message::{Event, Payload};
use crate::engine::GameState;

/// Game state rebuilt from recorded events alone.
#[derive(Debug, Clone)]
pub struct GameMirror {
    state: GameState,
}

impl Default for GameMirror {
    fn default() -> Self {
        Self::new()
    }
}

impl GameMirror {
    pub fn new() -> Self {
        GameMirror {
            state: GameState::empty(),
        }
    }

    /// Applies a game-topic event; returns false for anything else.
    pub fn apply(&mut self, event: &Event) -> bool {
        match &event.payload {
            Payload::ToolSelect(t) => {
                self.state.set_tool(t.source, t.tool);
                true
            }
            p => match p.as_delta() {
                Some(d) => {
                    self.state.apply_delta(&d);
                    true
                }
                None => false,
            },
        }
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn hash(&self) -> u64 {
        self.state.snapshot_hash()
    }
}
