import textwrap

import pytest


def _unit_type_block(type_id, name, hp, shield, damage, attack_range, cooldown,
                     move_speed=1):
    return textwrap.dedent(f"""\
      - type_id: {type_id}
        name: {name}
        max_hitpoints: {hp}
        max_shield: {shield}
        damage: {damage}
        attack_range: {attack_range}
        cooldown_steps: {cooldown}
        move_speed: {move_speed}
    """)


def duel_descriptor(ally_pos=(2, 2), enemy_pos=(6, 2), *, hp=45, shield=0,
                    damage=6, attack_range=5, cooldown=0, sight=9,
                    max_steps=50, width=16, height=16, name="duel"):
    """One unit per side at explicit positions."""
    ax, ay = ally_pos
    ex, ey = enemy_pos
    return (
        f"name: {name}\n"
        f"map_width: {width}\n"
        f"map_height: {height}\n"
        f"sight_range: {sight}\n"
        f"max_steps: {max_steps}\n"
        "unit_types:\n"
        + _unit_type_block(0, "ranged", hp, shield, damage, attack_range, cooldown)
        + "allies:\n"
        f"  - {{type_id: 0, count: 1, region: [{ax}, {ay}, {ax}, {ay}]}}\n"
        "enemies:\n"
        f"  - {{type_id: 0, count: 1, region: [{ex}, {ey}, {ex}, {ey}]}}\n"
    )


def lines_descriptor(n_allies=3, n_enemies=3, *, gap=7, hp=45, shield=0,
                     damage=6, attack_range=5, cooldown=1, sight=9,
                     max_steps=60, width=32, height=32, name="lines"):
    """Facing columns of identical units, like the builtin maps."""
    ay1 = 10 + n_allies - 1
    ey1 = 10 + n_enemies - 1
    return (
        f"name: {name}\n"
        f"map_width: {width}\n"
        f"map_height: {height}\n"
        f"sight_range: {sight}\n"
        f"max_steps: {max_steps}\n"
        "unit_types:\n"
        + _unit_type_block(0, "ranged", hp, shield, damage, attack_range, cooldown)
        + "allies:\n"
        f"  - {{type_id: 0, count: {n_allies}, region: [10, 10, 10, {ay1}]}}\n"
        "enemies:\n"
        f"  - {{type_id: 0, count: {n_enemies}, region: [{10 + gap}, 10, {10 + gap}, {ey1}]}}\n"
    )


@pytest.fixture
def duel():
    return duel_descriptor


@pytest.fixture
def lines():
    return lines_descriptor
