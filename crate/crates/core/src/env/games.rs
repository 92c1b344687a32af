//! Per-game dynamics. Every transition reads only the newest frame, the
//! action and the world stream.

use rand::Rng;

use super::{ActionId, Category, EnvRng, Frame, GameId, GameSpec, SceneObject};

pub(super) struct Outcome {
    pub frame: Frame,
    pub reward: f64,
    pub terminal: bool,
}

pub(super) fn initial_frame(spec: &GameSpec, rng: &mut EnvRng) -> Frame {
    let (w, h) = (spec.width, spec.height);
    let mut frame = Frame::empty(w, h);
    match spec.game {
        GameId::Dodger => {
            frame
                .objects
                .push(SceneObject::at(Category::Player, w / 2, h - 1));
            let x = rng.random_range(0..w);
            frame.objects.push(SceneObject::moving(
                Category::Rock,
                x,
                0,
                0,
                spec.rules.speed,
            ));
        }
        GameId::Shooter => {
            frame
                .objects
                .push(SceneObject::at(Category::Player, w / 2, h - 1));
            for _ in 0..spec.rules.population {
                spawn_free(&mut frame, rng, Category::Target, 0, h / 2);
            }
        }
        GameId::Collector => {
            frame
                .objects
                .push(SceneObject::at(Category::Player, w / 2, h / 2));
            for _ in 0..spec.rules.population {
                spawn_free(&mut frame, rng, Category::Coin, 0, h);
            }
        }
        GameId::Crossing => {
            frame
                .objects
                .push(SceneObject::at(Category::Player, w / 2, h - 1));
            for lane in 1..h - 1 {
                let dir = if lane % 2 == 1 { 1 } else { -1 };
                for _ in 0..spec.rules.population {
                    let x = rng.random_range(0..w);
                    frame.objects.push(SceneObject::moving(
                        Category::Car,
                        x,
                        lane,
                        dir * spec.rules.speed,
                        0,
                    ));
                }
            }
        }
    }
    frame
}

pub(super) fn advance(
    spec: &GameSpec,
    prev: &Frame,
    action: ActionId,
    rng: &mut EnvRng,
) -> Outcome {
    match spec.game {
        GameId::Dodger => dodger(spec, prev, action, rng),
        GameId::Shooter => shooter(spec, prev, action, rng),
        GameId::Collector => collector(spec, prev, action, rng),
        GameId::Crossing => crossing(spec, prev, action),
    }
}

fn player_pos(frame: &Frame) -> (i32, i32) {
    let p = frame.player().expect("every game frame holds a player");
    (p.bbox.x0, p.bbox.y0)
}

fn set_player(frame: &mut Frame, x: i32, y: i32) {
    let p = frame
        .objects
        .iter_mut()
        .find(|o| o.category == Category::Player)
        .expect("every game frame holds a player");
    p.bbox = super::BBox::cell(x, y);
}

fn occupied(frame: &Frame, x: i32, y: i32) -> bool {
    frame.objects.iter().any(|o| o.bbox.contains(x, y))
}

/// Places `category` on a uniformly drawn free cell with `y` in `[y_lo, y_hi)`.
fn spawn_free(frame: &mut Frame, rng: &mut EnvRng, category: Category, y_lo: i32, y_hi: i32) {
    let free: Vec<(i32, i32)> = (y_lo..y_hi)
        .flat_map(|y| (0..frame.width).map(move |x| (x, y)))
        .filter(|&(x, y)| !occupied(frame, x, y))
        .collect();
    if free.is_empty() {
        return;
    }
    let (x, y) = free[rng.random_range(0..free.len())];
    frame.objects.push(SceneObject::at(category, x, y));
}

fn dodger(spec: &GameSpec, prev: &Frame, action: ActionId, rng: &mut EnvRng) -> Outcome {
    let (w, h) = (spec.width, spec.height);
    let mut frame = prev.clone();
    let (px, py) = player_pos(&frame);
    let (dx, _, _) = action.components();
    let px = (px + dx).clamp(0, w - 1);
    set_player(&mut frame, px, py);

    let mut reward = 0.0;
    let mut terminal = false;
    let speed = spec.rules.speed;
    let mut kept = Vec::with_capacity(frame.objects.len());
    for mut o in frame.objects.drain(..) {
        if o.category != Category::Rock {
            kept.push(o);
            continue;
        }
        let (x, y0) = (o.bbox.x0, o.bbox.y0);
        // Collision if the rock's swept cells include the player cell.
        if x == px && (y0..=y0 + speed).contains(&py) {
            reward += spec.rules.penalty;
            terminal = true;
            continue;
        }
        let y = y0 + speed;
        if y >= h {
            reward += spec.rules.reward;
            continue;
        }
        o.bbox = super::BBox::cell(x, y);
        kept.push(o);
    }
    frame.objects = kept;

    if rng.random_bool(spec.rules.spawn_rate) {
        let x = rng.random_range(0..w);
        if !occupied(&frame, x, 0) {
            frame
                .objects
                .push(SceneObject::moving(Category::Rock, x, 0, 0, speed));
        }
    }
    Outcome {
        frame,
        reward,
        terminal,
    }
}

fn shooter(spec: &GameSpec, prev: &Frame, action: ActionId, rng: &mut EnvRng) -> Outcome {
    let (w, h) = (spec.width, spec.height);
    let mut frame = prev.clone();
    let (px, py) = player_pos(&frame);
    let (dx, _, fire) = action.components();
    let px = (px + dx).clamp(0, w - 1);
    set_player(&mut frame, px, py);

    let mut reward = 0.0;
    let speed = spec.rules.speed.max(1);

    // Advance bullets cell by cell so fast bullets cannot tunnel through targets.
    let mut bullets: Vec<(i32, i32)> = frame
        .of(Category::Bullet)
        .map(|o| (o.bbox.x0, o.bbox.y0))
        .collect();
    frame.objects.retain(|o| o.category != Category::Bullet);
    let mut live = Vec::new();
    for (x, mut y) in bullets.drain(..) {
        let mut alive = true;
        for _ in 0..speed {
            y -= 1;
            if y < 0 {
                alive = false;
                break;
            }
            if hit_target(&mut frame, x, y) {
                reward += spec.rules.reward;
                alive = false;
                break;
            }
        }
        if alive {
            live.push((x, y));
        }
    }

    if fire && live.is_empty() {
        reward -= spec.rules.penalty.abs();
        let (bx, by) = (px, py - 1);
        if hit_target(&mut frame, bx, by) {
            reward += spec.rules.reward;
        } else {
            live.push((bx, by));
        }
    }
    for (x, y) in live {
        frame
            .objects
            .push(SceneObject::moving(Category::Bullet, x, y, 0, -speed));
    }

    let targets = frame.of(Category::Target).count();
    if targets < spec.rules.population && rng.random_bool(spec.rules.spawn_rate) {
        spawn_free(&mut frame, rng, Category::Target, 0, h / 2);
    }
    Outcome {
        frame,
        reward,
        terminal: false,
    }
}

fn hit_target(frame: &mut Frame, x: i32, y: i32) -> bool {
    if let Some(i) = frame
        .objects
        .iter()
        .position(|o| o.category == Category::Target && o.bbox.contains(x, y))
    {
        frame.objects.remove(i);
        true
    } else {
        false
    }
}

fn collector(spec: &GameSpec, prev: &Frame, action: ActionId, rng: &mut EnvRng) -> Outcome {
    let (w, h) = (spec.width, spec.height);
    let mut frame = prev.clone();
    let (px, py) = player_pos(&frame);
    let (dx, dy, _) = action.components();
    let (px, py) = ((px + dx).clamp(0, w - 1), (py + dy).clamp(0, h - 1));
    set_player(&mut frame, px, py);

    let mut reward = 0.0;
    if let Some(i) = frame
        .objects
        .iter()
        .position(|o| o.category == Category::Coin && o.bbox.contains(px, py))
    {
        frame.objects.remove(i);
        reward += spec.rules.reward;
    }
    let coins = frame.of(Category::Coin).count();
    if coins < spec.rules.population && rng.random_bool(spec.rules.spawn_rate) {
        spawn_free(&mut frame, rng, Category::Coin, 0, h);
    }
    Outcome {
        frame,
        reward,
        terminal: false,
    }
}

fn crossing(spec: &GameSpec, prev: &Frame, action: ActionId) -> Outcome {
    let (w, h) = (spec.width, spec.height);
    let mut frame = prev.clone();
    let (px, py) = player_pos(&frame);
    let (_, dy, _) = action.components();
    let mut py = (py + dy).clamp(0, h - 1);

    for o in frame
        .objects
        .iter_mut()
        .filter(|o| o.category == Category::Car)
    {
        let m = o.motion.unwrap_or(super::Motion { dx: 0, dy: 0 });
        let x = (o.bbox.x0 + m.dx).rem_euclid(w);
        o.bbox = super::BBox::cell(x, o.bbox.y0);
    }

    let mut reward = 0.0;
    if frame.of(Category::Car).any(|c| c.bbox.contains(px, py)) {
        py = (py + 1).min(h - 1);
    } else if py == 0 {
        reward += spec.rules.reward;
        py = h - 1;
    }
    set_player(&mut frame, px, py);
    Outcome {
        frame,
        reward,
        terminal: false,
    }
}
