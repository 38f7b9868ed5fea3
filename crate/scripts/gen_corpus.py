#!/usr/bin/env python3
"""Generate the synthetic everyday-conversation corpus shipped in fixtures/.

The text is produced from a seeded phrase grammar, so it carries no third-party
copyright and is released into the public domain together with this script.

    python3 scripts/gen_corpus.py > fixtures/chat_corpus.txt
    sha256sum fixtures/chat_corpus.txt

Each output line is one utterance of two to six sentences.
"""

import random
import sys

SEED = 20240917
TARGET_BYTES = 1_250_000

PEOPLE = [
    "my sister", "my brother", "my mom", "my dad", "my cousin", "my neighbor",
    "my best friend", "my roommate", "my boss", "my coworker", "my grandmother",
    "my grandfather", "my uncle", "my aunt", "my partner", "my son", "my daughter",
    "our teacher", "a friend of mine", "an old classmate", "the guy next door",
    "my kids", "my parents", "my team", "my landlord", "our coach", "my niece",
    "my nephew", "my husband", "my wife", "a colleague", "the new manager",
]
PLACES = [
    "the park", "the beach", "the mountains", "the lake", "the city", "the farmers market",
    "the gym", "the library", "the office", "the coffee shop", "the mall", "the river",
    "the museum", "the zoo", "the countryside", "the old town", "the stadium", "the garden",
    "the bakery", "the cinema", "the airport", "the train station", "the campsite",
    "the harbor", "the forest", "the village", "the island", "the bookstore", "the pool",
    "the concert hall", "the night market", "the hiking trail", "the ski resort",
]
CITIES = [
    "paris", "rome", "lisbon", "tokyo", "seattle", "chicago", "denver", "boston",
    "madrid", "vienna", "prague", "dublin", "oslo", "austin", "vancouver", "sydney",
    "berlin", "kyoto", "athens", "barcelona", "montreal", "edinburgh", "portland",
]
WEATHER = [
    "sunny", "rainy", "windy", "cloudy", "foggy", "chilly", "humid", "freezing",
    "warm", "hot", "stormy", "mild", "snowy", "gray", "breezy", "muggy", "clear",
]
FOODS = [
    "pasta", "soup", "tacos", "curry", "pancakes", "sushi", "salad", "bread",
    "pizza", "dumplings", "stew", "chili", "noodles", "lasagna", "risotto", "pie",
    "cookies", "banana bread", "fried rice", "roast chicken", "grilled fish",
    "vegetable soup", "apple crumble", "lemon cake", "omelette", "burritos",
    "ramen", "falafel", "paella", "hummus", "muffins", "waffles", "sandwiches",
]
HOBBIES = [
    "hiking", "painting", "gardening", "knitting", "cycling", "running", "swimming",
    "reading", "baking", "photography", "fishing", "climbing", "yoga", "chess",
    "woodworking", "pottery", "dancing", "singing", "writing poetry", "bird watching",
    "playing guitar", "playing piano", "learning spanish", "learning french",
    "board games", "video games", "camping", "sailing", "skating", "tennis",
    "volunteering", "journaling", "cooking", "sewing", "surfing", "meditation",
]
SHOWS = [
    "a documentary about oceans", "a new mystery series", "an old comedy show",
    "a cooking competition", "a space movie", "a romantic comedy", "a crime drama",
    "a nature program", "a history podcast", "an animated film", "a travel vlog",
    "a science podcast", "a fantasy series", "a reality show", "a sports documentary",
    "a horror movie", "a musical", "a true crime podcast", "a quiz show",
]
PETS = [
    "dog", "cat", "puppy", "kitten", "rabbit", "parrot", "hamster", "goldfish",
    "turtle", "guinea pig", "horse", "lizard",
]
PET_NAMES = [
    "max", "bella", "luna", "charlie", "milo", "daisy", "oscar", "coco", "ruby",
    "biscuit", "pepper", "ziggy", "olive", "teddy", "willow", "rocky", "mochi",
]
TECH = [
    "my phone", "my laptop", "the new tablet", "a smart watch", "the printer",
    "the wifi router", "a new app", "the smart speaker", "my headphones",
    "the old computer", "a budgeting app", "a fitness tracker", "the camera",
]
TIMES = [
    "yesterday", "last week", "last weekend", "this morning", "last night",
    "a few days ago", "the other day", "on sunday", "on friday evening",
    "over the holidays", "last month", "earlier today", "on my day off",
    "after work", "before breakfast", "during lunch", "this afternoon",
]
FUTURE = [
    "tomorrow", "next week", "this weekend", "next month", "in the spring",
    "over the summer", "after the holidays", "on saturday", "soon", "next year",
    "in a couple of weeks", "before winter", "on my next day off",
]
FEELINGS = [
    "happy", "tired", "excited", "relaxed", "nervous", "grateful", "busy",
    "curious", "proud", "stressed", "calm", "surprised", "hopeful", "bored",
    "inspired", "exhausted", "content", "motivated", "overwhelmed", "cheerful",
]
ADJ = [
    "great", "lovely", "amazing", "strange", "wonderful", "nice", "terrible",
    "interesting", "fun", "quiet", "busy", "beautiful", "crowded", "peaceful",
    "delicious", "expensive", "cheap", "cozy", "tiny", "huge", "relaxing",
    "exhausting", "charming", "noisy", "perfect", "messy", "simple", "fancy",
]
ADV = [
    "really", "pretty", "quite", "so", "very", "a bit", "rather", "super",
    "incredibly", "surprisingly", "honestly", "kind of",
]
WORK = [
    "a big project", "the quarterly report", "a new client", "my exams",
    "a group assignment", "the budget meeting", "a job interview", "my thesis",
    "the product launch", "a presentation", "night shifts", "the training course",
    "a research paper", "the spring semester", "a coding bootcamp", "the inventory",
]
GOALS = [
    "run a marathon", "learn to cook properly", "save for a house", "travel more",
    "read fifty books", "get a promotion", "start my own business", "learn an instrument",
    "spend more time outdoors", "sleep better", "eat healthier", "write a novel",
    "visit every national park", "learn to swim", "pay off my loans",
    "move closer to my family", "volunteer every month", "finish my degree",
]
HOME = [
    "the kitchen", "the living room", "the garden", "the bathroom", "the balcony",
    "the spare room", "the garage", "the attic", "the hallway", "the basement",
]
CLOTHES = [
    "a warm coat", "new boots", "a denim jacket", "a wool sweater", "running shoes",
    "a summer dress", "a rain jacket", "a vintage shirt", "a scarf", "sneakers",
]
NEWS = [
    "the local election", "the new bridge", "the price of groceries", "the heat wave",
    "the festival downtown", "the new train line", "the school budget", "the storm",
    "the housing market", "the science fair", "the marathon route", "the city park plan",
]
EXCLAIM = [
    "oh", "wow", "ha", "well", "yeah", "honestly", "oh nice", "oh no", "right",
    "absolutely", "totally", "hmm", "sure", "ah", "oh man", "no way",
]

VERB_PAST = [
    ("went to", PLACES), ("visited", PLACES), ("walked around", PLACES),
    ("cooked", FOODS), ("made", FOODS), ("tried", FOODS), ("ordered", FOODS),
    ("watched", SHOWS), ("finished", SHOWS), ("started", SHOWS),
    ("fixed", TECH), ("bought", TECH), ("set up", TECH), ("cleaned", HOME),
    ("painted", HOME), ("repainted", HOME), ("bought", CLOTHES), ("found", CLOTHES),
    ("read about", NEWS), ("heard about", NEWS), ("worked on", WORK),
    ("finished", WORK), ("prepared for", WORK),
]


def pick(xs):
    return random.choice(xs)


def cap(s):
    return s[:1].upper() + s[1:]


def subj():
    r = random.random()
    if r < 0.45:
        return "I", True
    if r < 0.6:
        return "we", True
    return pick(PEOPLE), False


def past_clause():
    s, _ = subj()
    verb, objs = pick(VERB_PAST)
    tail = ""
    if random.random() < 0.5:
        tail = " " + pick(TIMES)
    if random.random() < 0.25:
        tail += " with " + pick(PEOPLE)
    return f"{s} {verb} {pick(objs)}{tail}"


def statement():
    forms = [
        lambda: past_clause() + ".",
        lambda: past_clause() + f" and it was {pick(ADV)} {pick(ADJ)}.",
        lambda: f"The weather has been {pick(ADV)} {pick(WEATHER)} {pick(TIMES)}.",
        lambda: f"It was {pick(WEATHER)} and {pick(WEATHER)} at {pick(PLACES)} {pick(TIMES)}.",
        lambda: f"I have been getting into {pick(HOBBIES)} lately.",
        lambda: f"{cap(pick(PEOPLE))} has been {pick(ADV)} into {pick(HOBBIES)} these days.",
        lambda: f"Our {pick(PETS)} {pick(PET_NAMES)} loves {pick(PLACES)}.",
        lambda: f"My {pick(PETS)} keeps stealing {pick(FOODS)} from the table.",
        lambda: f"I feel {pick(ADV)} {pick(FEELINGS)} about {pick(WORK)}.",
        lambda: f"Work has been {pick(ADV)} {pick(ADJ)} because of {pick(WORK)}.",
        lambda: f"We are planning a trip to {pick(CITIES)} {pick(FUTURE)}.",
        lambda: f"I want to {pick(GOALS)} {pick(FUTURE)}.",
        lambda: f"One of my goals is to {pick(GOALS)}.",
        lambda: f"{cap(pick(PEOPLE))} made {pick(FOODS)} {pick(TIMES)} and it was {pick(ADJ)}.",
        lambda: f"The best {pick(FOODS)} I ever had was in {pick(CITIES)}.",
        lambda: f"I finally bought {pick(CLOTHES)} for the {pick(WEATHER)} days.",
        lambda: f"Everyone is talking about {pick(NEWS)} right now.",
        lambda: f"I read that {pick(NEWS)} might change {pick(FUTURE)}.",
        lambda: f"{cap(pick(TECH))} stopped working {pick(TIMES)}.",
        lambda: f"I have been trying to go to {pick(PLACES)} more often to stay healthy.",
        lambda: f"My relationship with {pick(PEOPLE)} has gotten {pick(ADV)} better.",
        lambda: f"We redid {pick(HOME)} and it looks {pick(ADJ)} now.",
        lambda: f"I think {pick(HOBBIES)} is {pick(ADV)} {pick(ADJ)} for the mind.",
        lambda: f"Last time I was in {pick(CITIES)} it was {pick(WEATHER)} the whole time.",
        lambda: f"There is a {pick(ADJ)} place near {pick(PLACES)} that serves {pick(FOODS)}.",
        lambda: f"I was {pick(ADV)} {pick(FEELINGS)} after {pick(WORK)}.",
        lambda: f"My plan for {pick(FUTURE)} is mostly {pick(HOBBIES)} and {pick(HOBBIES)}.",
        lambda: f"Honestly, {pick(HOBBIES)} helps me feel {pick(FEELINGS)}.",
        lambda: f"It takes about {random.randint(2, 90)} minutes to get to {pick(PLACES)} from here.",
        lambda: f"We spent {random.randint(2, 12)} days in {pick(CITIES)} and loved it.",
    ]
    return pick(forms)()


def question():
    forms = [
        lambda: "How about you?",
        lambda: "What about you?",
        lambda: f"Have you ever tried {pick(HOBBIES)}?",
        lambda: f"Do you like {pick(FOODS)}?",
        lambda: f"Have you been to {pick(CITIES)}?",
        lambda: f"How is the weather where you are?",
        lambda: f"What are your plans for {pick(FUTURE)}?",
        lambda: f"Do you have any pets?",
        lambda: f"What do you usually do after work?",
        lambda: f"Have you seen {pick(SHOWS)}?",
        lambda: f"How is {pick(PEOPLE)} doing?",
        lambda: f"Are you still into {pick(HOBBIES)}?",
        lambda: f"What is your favorite thing to cook?",
        lambda: f"Did you hear about {pick(NEWS)}?",
        lambda: f"Any big goals for {pick(FUTURE)}?",
        lambda: f"Do you prefer {pick(PLACES)} or {pick(PLACES)}?",
        lambda: f"Is {pick(TECH)} worth it?",
        lambda: f"How do you stay {pick(FEELINGS)} when things get busy?",
        lambda: f"Would you ever move to {pick(CITIES)}?",
        lambda: f"What kind of {pick(['music', 'books', 'movies', 'food', 'clothes'])} do you like?",
    ]
    return pick(forms)()


def reaction():
    forms = [
        lambda: f"{cap(pick(EXCLAIM))}, that sounds {pick(ADV)} {pick(ADJ)}!",
        lambda: f"{cap(pick(EXCLAIM))}, I know what you mean.",
        lambda: f"That is {pick(ADV)} {pick(ADJ)}.",
        lambda: f"{cap(pick(EXCLAIM))}, I would love to try that.",
        lambda: f"I totally agree with you.",
        lambda: f"That reminds me of {pick(TIMES)}.",
        lambda: f"{cap(pick(EXCLAIM))}! I did not expect that.",
        lambda: f"I can imagine how {pick(FEELINGS)} you must feel.",
        lambda: f"Same here, it has been {pick(ADV)} {pick(ADJ)}.",
        lambda: f"Good for you!",
    ]
    return pick(forms)()


def utterance():
    parts = []
    if random.random() < 0.55:
        parts.append(reaction())
    for _ in range(random.randint(1, 4)):
        parts.append(statement())
    if random.random() < 0.6:
        parts.append(question())
    return " ".join(parts)


def main():
    random.seed(SEED)
    out = sys.stdout
    written = 0
    while written < TARGET_BYTES:
        line = utterance() + "\n"
        out.write(line)
        written += len(line.encode("utf-8"))


if __name__ == "__main__":
    main()
