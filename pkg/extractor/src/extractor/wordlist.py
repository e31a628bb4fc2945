"""Built-in vocabulary for the stand-in tokenizer.

Word-level, lowercase. Ordering is part of the tokenizer contract:
ids are special tokens first, then this list in order.
"""

WORDS = """
this image shows a an the and of in on at with near under over behind beside
between against above below inside outside into onto across along around
new old latest modern vintage classic small large big little tiny huge tall
short long wide narrow bright dark light colorful plain shiny dull clean
dirty wet dry open closed empty full young elderly happy sad busy quiet
red orange yellow green blue purple pink brown black white gray golden
silver
man woman person people child children boy girl baby family crowd group
couple player worker rider driver chef artist student teacher friend
dog cat bird horse cow sheep elephant giraffe zebra bear lion tiger monkey
rabbit duck chicken fish pig goat deer fox wolf squirrel mouse owl eagle
car truck bus train plane airplane boat ship bicycle bike motorcycle van
taxi tractor trailer scooter skateboard surfboard sled wagon helicopter
road street highway path trail sidewalk bridge tunnel crossing intersection
snow rain fog ice sand grass dirt mud rock stone mountain hill valley
field forest tree bush flower plant leaf branch garden park beach ocean
sea lake river pond waterfall sky cloud sun moon star rainbow
house home building tower castle barn shed garage station airport harbor
market store shop restaurant cafe kitchen bathroom bedroom living room
office school library church museum stadium farm zoo playground yard
table chair bench sofa couch bed desk shelf counter cabinet drawer door
window wall floor ceiling roof fence gate stairs ladder mirror lamp clock
plate bowl cup glass mug bottle jar pot pan knife fork spoon napkin tray
food meal breakfast lunch dinner pizza sandwich burger hotdog salad soup
pasta rice bread cheese butter egg meat chicken beef fish fruit apple
banana orange grape lemon berry cake cookie donut pie cream chocolate
candy sugar coffee tea juice milk water wine beer soda
ball bat glove racket net goal kite frisbee toy doll game puzzle book
magazine newspaper phone laptop computer keyboard screen camera remote
umbrella bag backpack purse suitcase hat cap helmet scarf glove coat
jacket shirt dress skirt pants jeans shorts shoe boot sock tie belt
glasses sunglasses watch ring necklace
sitting standing walking running jumping flying riding driving eating
drinking holding carrying wearing playing reading writing cooking baking
cutting washing cleaning throwing catching kicking hitting swinging
surfing skiing skating swimming diving climbing resting sleeping laying
looking watching smiling laughing talking waving pointing leaning parked
stopped moving traveling racing grazing feeding hanging floating covered
filled topped decorated surrounded gathered lined stacked scattered
is are was were has have with while during next very many few several
some one two three four five six seven eight nine ten first second third
its his her their our your other another same different front back left
right top bottom middle center side corner edge end beginning
day night morning evening afternoon winter summer spring fall autumn
weather sunny cloudy rainy snowy windy foggy stormy celebration party
wedding birthday holiday game match race show parade festival
object scene view area place spot location background foreground distance
photo picture closeup
""".split()
