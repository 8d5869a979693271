use std::collections::BTreeMap;
use std::sync::Arc;

use super::*;

#[derive(Clone, Debug, PartialEq)]
enum Grab {
    Item { item_id: String, from: Point2 },
    Stroke(Stroke),
    /// A touch that landed on nothing; tracked so its moves are not flagged.
    Nothing,
}

#[derive(Clone, Debug, PartialEq)]
struct ActiveTouch {
    source: TouchSource,
    grab: Grab,
}

/// The game state. All mutations go through [`GameState::apply_touch`],
/// [`GameState::apply_delta`], [`GameState::set_mode`] or
/// [`GameState::reset`], each of which reports what changed.
#[derive(Clone, Debug)]
pub struct GameState {
    items: Vec<Item>,
    strokes: Vec<Stroke>,
    background: ColourRaster,
    mode: GameMode,
    active: BTreeMap<u32, ActiveTouch>,
    tools: BTreeMap<TouchSource, Tool>,
    defaults: Arc<Scene>,
}

impl Default for GameState {
    fn default() -> Self {
        GameState::new(Scene::parse(DEFAULT_SCENE).expect("bundled scene is valid"))
    }
}

impl GameState {
    pub fn new(scene: Scene) -> Self {
        let mut items = scene.items.clone();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        GameState {
            items,
            strokes: Vec::new(),
            background: scene.background.clone(),
            mode: GameMode::Tutorial,
            active: BTreeMap::new(),
            tools: BTreeMap::new(),
            defaults: Arc::new(scene),
        }
    }

    /// No items, default background. Used as the starting point for mirrors
    /// that rebuild state from recorded deltas.
    pub fn empty() -> Self {
        GameState::new(Scene::empty())
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.index_of(id).map(|i| &self.items[i])
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.items.binary_search_by(|it| it.id.as_str().cmp(id)).ok()
    }

    pub fn strokes(&self) -> &[Stroke] {
        &self.strokes
    }

    pub fn background(&self) -> &ColourRaster {
        &self.background
    }

    pub fn mode(&self) -> GameMode {
        self.mode
    }

    pub fn snapshot_hash(&self) -> u64 {
        snapshot_hash(self)
    }

    pub fn tool(&self, source: TouchSource) -> Tool {
        if source == TouchSource::RobotFake {
            return Tool::Drag;
        }
        self.tools.get(&source).copied().unwrap_or(Tool::Drag)
    }

    pub fn set_tool(&mut self, source: TouchSource, tool: Tool) {
        self.tools.insert(source, tool);
    }

    /// Touch id currently holding `item_id`, if any.
    pub fn grabbed_by(&self, item_id: &str) -> Option<u32> {
        self.active.iter().find_map(|(tid, t)| match &t.grab {
            Grab::Item { item_id: id, .. } if id == item_id => Some(*tid),
            _ => None,
        })
    }

    pub fn active_touches(&self) -> usize {
        self.active.len()
    }

    pub fn set_mode(&mut self, mode: GameMode) -> Option<GameDelta> {
        if self.mode == mode {
            return None;
        }
        self.mode = mode;
        Some(GameDelta::Mode(mode))
    }

    /// Background with every finalized stroke painted over it, in order.
    pub fn composite_raster(&self) -> ColourRaster {
        let mut r = self.background.clone();
        for s in &self.strokes {
            let cells = r.stroke_cells(&s.polyline(), s.width);
            r.paint(&cells, s.colour);
        }
        r
    }

    /// Deltas that rebuild this state from scratch.
    pub fn snapshot_deltas(&self) -> Vec<GameDelta> {
        vec![
            GameDelta::Background(BackgroundDelta::Snapshot(self.background.clone())),
            GameDelta::Item(ItemDelta::Snapshot(self.items.clone())),
            GameDelta::Stroke(StrokeDelta::Snapshot(self.strokes.clone())),
            GameDelta::Mode(self.mode),
        ]
    }

    /// Restores the default layout, clears the drawing layer and returns to
    /// tutorial mode.
    pub fn reset(&mut self) -> Vec<GameDelta> {
        let defaults = Arc::clone(&self.defaults);
        let tools = std::mem::take(&mut self.tools);
        *self = GameState::new((*defaults).clone());
        self.tools = tools;
        self.snapshot_deltas()
    }

    /// Topmost item capturing `p` that no other touch holds: highest z-order
    /// first, ties resolved by the smallest id.
    fn pick_item(&self, p: Point2) -> Option<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.captures(p) && self.grabbed_by(&it.id).is_none())
            .min_by(|(_, a), (_, b)| b.z_order.cmp(&a.z_order).then_with(|| a.id.cmp(&b.id)))
            .map(|(i, _)| i)
    }

    fn move_item(&mut self, idx: usize, to: Point2, out: &mut Vec<GameDelta>) {
        let item = &mut self.items[idx];
        let pose = Transform2D::new(item.pose.rotation, to.x, to.y);
        if item.pose != pose {
            item.pose = pose;
            out.push(GameDelta::Item(ItemDelta::Pose {
                item_id: item.id.clone(),
                pose,
            }));
        }
    }

    /// Applies one touch and returns the resulting state changes (including
    /// warnings). Positions outside the play area are clamped; out-of-order
    /// phases are ignored.
    pub fn apply_touch(&mut self, ev: &TouchEvent) -> Vec<GameDelta> {
        self.apply_touch_on(ev, None)
    }

    /// Like [`GameState::apply_touch`], but a `down` prefers `target` when it
    /// is under the finger and free. Robot drags use this so that an item
    /// lying on top of the intended one is not picked up instead.
    pub fn apply_touch_on(&mut self, ev: &TouchEvent, target: Option<&str>) -> Vec<GameDelta> {
        let mut out = Vec::new();
        let raw = ev.position();
        let p = clamp_to_play_area(raw);
        let phase_violation = |out: &mut Vec<GameDelta>| {
            out.push(GameDelta::Warning(EngineWarning::PhaseViolation {
                touch_id: ev.touch_id,
                phase: ev.phase,
            }))
        };
        let valid = match ev.phase {
            TouchPhase::Down => !self.active.contains_key(&ev.touch_id),
            TouchPhase::Move | TouchPhase::Up => self.active.contains_key(&ev.touch_id),
        };
        if !valid {
            phase_violation(&mut out);
            return out;
        }
        if p != raw || !raw.x.is_finite() || !raw.y.is_finite() {
            out.push(GameDelta::Warning(EngineWarning::OutOfBounds {
                touch_id: ev.touch_id,
                x: ev.x,
                y: ev.y,
            }));
        }
        let p = if p.x.is_finite() && p.y.is_finite() {
            p
        } else {
            Point2::new(0.0, 0.0)
        };
        let point = StrokePoint {
            x: p.x,
            y: p.y,
            stamp: ev.stamp,
        };

        match ev.phase {
            TouchPhase::Down => {
                let grab = match self.tool(ev.source) {
                    Tool::Drag => match target
                        .and_then(|t| self.index_of(t))
                        .filter(|&i| self.items[i].captures(p) && self.grabbed_by(&self.items[i].id).is_none())
                        .or_else(|| self.pick_item(p))
                    {
                        Some(idx) => {
                            let item = &self.items[idx];
                            out.push(GameDelta::Item(ItemDelta::Grab {
                                item_id: item.id.clone(),
                                touch_id: ev.touch_id,
                                source: ev.source,
                            }));
                            Grab::Item {
                                item_id: item.id.clone(),
                                from: item.centre(),
                            }
                        }
                        None => Grab::Nothing,
                    },
                    Tool::Draw { colour, width } => {
                        out.push(GameDelta::Stroke(StrokeDelta::Begin {
                            touch_id: ev.touch_id,
                            colour,
                            width,
                            point,
                        }));
                        Grab::Stroke(Stroke {
                            colour,
                            width,
                            points: vec![point],
                        })
                    }
                };
                self.active.insert(
                    ev.touch_id,
                    ActiveTouch {
                        source: ev.source,
                        grab,
                    },
                );
            }
            TouchPhase::Move => {
                let grab = self.active[&ev.touch_id].grab.clone();
                match grab {
                    Grab::Item { item_id, .. } => {
                        if let Some(idx) = self.index_of(&item_id) {
                            self.move_item(idx, p, &mut out);
                        }
                    }
                    Grab::Stroke(_) => {
                        if let Some(ActiveTouch {
                            grab: Grab::Stroke(s),
                            ..
                        }) = self.active.get_mut(&ev.touch_id)
                        {
                            s.points.push(point);
                        }
                        out.push(GameDelta::Stroke(StrokeDelta::Append {
                            touch_id: ev.touch_id,
                            point,
                        }));
                    }
                    Grab::Nothing => {}
                }
            }
            TouchPhase::Up => {
                let touch = self.active.remove(&ev.touch_id).expect("validated above");
                match touch.grab {
                    Grab::Item { item_id, from } => {
                        if let Some(idx) = self.index_of(&item_id) {
                            self.move_item(idx, p, &mut out);
                            out.push(GameDelta::Item(ItemDelta::Release {
                                item_id,
                                touch_id: ev.touch_id,
                                source: touch.source,
                                from,
                                to: self.items[idx].centre(),
                            }));
                        }
                    }
                    Grab::Stroke(mut s) => {
                        s.points.push(point);
                        self.strokes.push(s);
                        out.push(GameDelta::Stroke(StrokeDelta::Append {
                            touch_id: ev.touch_id,
                            point,
                        }));
                        out.push(GameDelta::Stroke(StrokeDelta::End {
                            touch_id: ev.touch_id,
                        }));
                    }
                    Grab::Nothing => {}
                }
            }
        }
        out
    }

    /// Applies a recorded delta. This is how replays rebuild state: the
    /// result matches the state that produced the deltas.
    pub fn apply_delta(&mut self, delta: &GameDelta) {
        match delta {
            GameDelta::Item(d) => match d {
                ItemDelta::Snapshot(items) => {
                    self.items = items.clone();
                    self.items.sort_by(|a, b| a.id.cmp(&b.id));
                    self.active
                        .retain(|_, t| !matches!(t.grab, Grab::Item { .. }));
                }
                ItemDelta::Grab {
                    item_id,
                    touch_id,
                    source,
                } => {
                    let from = self.item(item_id).map(Item::centre).unwrap_or_default();
                    self.active.insert(
                        *touch_id,
                        ActiveTouch {
                            source: *source,
                            grab: Grab::Item {
                                item_id: item_id.clone(),
                                from,
                            },
                        },
                    );
                }
                ItemDelta::Pose { item_id, pose } => {
                    if let Some(idx) = self.index_of(item_id) {
                        self.items[idx].pose = *pose;
                    }
                }
                ItemDelta::Release { touch_id, .. } => {
                    self.active.remove(touch_id);
                }
            },
            GameDelta::Stroke(d) => match d {
                StrokeDelta::Snapshot(strokes) => {
                    self.strokes = strokes.clone();
                    self.active
                        .retain(|_, t| !matches!(t.grab, Grab::Stroke(_)));
                }
                StrokeDelta::Begin {
                    touch_id,
                    colour,
                    width,
                    point,
                } => {
                    self.active.insert(
                        *touch_id,
                        ActiveTouch {
                            source: TouchSource::Wizard,
                            grab: Grab::Stroke(Stroke {
                                colour: *colour,
                                width: *width,
                                points: vec![*point],
                            }),
                        },
                    );
                }
                StrokeDelta::Append { touch_id, point } => {
                    if let Some(ActiveTouch {
                        grab: Grab::Stroke(s),
                        ..
                    }) = self.active.get_mut(touch_id)
                    {
                        s.points.push(*point);
                    }
                }
                StrokeDelta::End { touch_id } => {
                    if let Some(ActiveTouch {
                        grab: Grab::Stroke(s),
                        ..
                    }) = self.active.remove(touch_id)
                    {
                        self.strokes.push(s);
                    }
                }
            },
            GameDelta::Background(BackgroundDelta::Snapshot(r)) => {
                self.background = r.clone();
            }
            GameDelta::Mode(m) => self.mode = *m,
            GameDelta::Warning(_) => {}
        }
    }
}
